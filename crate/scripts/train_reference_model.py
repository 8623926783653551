#!/usr/bin/env python3
"""Train the desk-scale reference CNN and write it in the fecnn model format.

Architecture (valid convolutions, ReLU after every hidden layer):

    conv 1->8, 3x3, stride 1 on 28x28  -> 26x26, max-pool 2 -> 13x13
    conv 8->16, 3x3, stride 1 on 13x13 -> 11x11, max-pool 2 -> 5x5
    fc 400->32
    fc 32->10

The layout of the output file is documented in docs/formats.md.

Usage:
    python3 scripts/train_reference_model.py data/mnist-5k assets/reference-model.bin
"""

import struct
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

SEED = 7
EPOCHS = 60
BATCH = 64
MAGIC = b"FECNNMDL"
VERSION = 1


def read_idx_images(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic, n, rows, cols = struct.unpack(">IIII", data[:16])
    assert magic == 0x00000803
    return np.frombuffer(data[16:], dtype=np.uint8).reshape(n, rows, cols)


def read_idx_labels(path: Path) -> np.ndarray:
    data = path.read_bytes()
    magic, n = struct.unpack(">II", data[:8])
    assert magic == 0x00000801
    return np.frombuffer(data[8:], dtype=np.uint8)[:n]


class Net(nn.Module):
    def __init__(self) -> None:
        super().__init__()
        self.conv1 = nn.Conv2d(1, 8, 3)
        self.conv2 = nn.Conv2d(8, 16, 3)
        self.fc1 = nn.Linear(400, 32)
        self.fc2 = nn.Linear(32, 10)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = F.max_pool2d(F.relu(self.conv1(x)), 2)
        x = F.max_pool2d(F.relu(self.conv2(x)), 2)
        x = torch.flatten(x, 1)
        x = F.relu(self.fc1(x))
        return self.fc2(x)


def shift_batch(x: torch.Tensor, gen: torch.Generator) -> torch.Tensor:
    """Random translation by up to two pixels in each direction."""
    out = torch.zeros_like(x)
    dy, dx = (torch.randint(-2, 3, (2,), generator=gen)).tolist()
    src = x[:, :, max(0, -dy):28 - max(0, dy), max(0, -dx):28 - max(0, dx)]
    out[:, :, max(0, dy):max(0, dy) + src.shape[2], max(0, dx):max(0, dx) + src.shape[3]] = src
    return out


def accuracy(net: Net, x: torch.Tensor, y: torch.Tensor) -> float:
    with torch.no_grad():
        return (net(x).argmax(1) == y).float().mean().item()


def write_model(net: Net, path: Path) -> None:
    # (kind, relu, pool, c_in, c_out, kernel, stride, feat)
    table = [
        (0, 1, 2, 1, 8, 3, 1, 28),
        (0, 1, 2, 8, 16, 3, 1, 13),
        (1, 1, 1, 400, 32, 1, 1, 1),
        (1, 0, 1, 32, 10, 1, 1, 1),
    ]
    params = [net.conv1, net.conv2, net.fc1, net.fc2]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IIIIII", VERSION, 28, 28, 1, 10, len(table)))
        for kind, relu, pool, c_in, c_out, kernel, stride, feat in table:
            f.write(struct.pack("<BBBBIIIII", kind, relu, pool, 0, c_in, c_out, kernel, stride, feat))
        for layer in params:
            w = layer.weight.detach().numpy().astype("<f4").ravel()
            b = layer.bias.detach().numpy().astype("<f4").ravel()
            f.write(w.tobytes())
            f.write(b.tobytes())


def main() -> None:
    data, out = Path(sys.argv[1]), Path(sys.argv[2])
    torch.manual_seed(SEED)
    gen = torch.Generator().manual_seed(SEED)

    def load(split: str):
        x = read_idx_images(data / f"{split}-images-idx3-ubyte").astype(np.float32) / 255.0
        y = read_idx_labels(data / f"{split}-labels-idx1-ubyte").astype(np.int64)
        return torch.from_numpy(x).unsqueeze(1), torch.from_numpy(y)

    x_train, y_train = load("train")
    x_test, y_test = load("test")

    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=2e-3, weight_decay=1e-4)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, EPOCHS)
    for epoch in range(EPOCHS):
        net.train()
        order = torch.randperm(len(x_train), generator=gen)
        for i in range(0, len(order), BATCH):
            idx = order[i:i + BATCH]
            xb = shift_batch(x_train[idx], gen)
            loss = F.cross_entropy(net(xb), y_train[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
        if epoch % 10 == 9 or epoch == EPOCHS - 1:
            net.eval()
            print(f"epoch {epoch + 1}: train {accuracy(net, x_train, y_train):.4f} "
                  f"test {accuracy(net, x_test, y_test):.4f}")

    write_model(net, out)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
