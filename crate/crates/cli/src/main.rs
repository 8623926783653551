use clap::Parser;

fn main() {
    let cli = fecnn::cli::Cli::parse();
    if let Err(e) = fecnn::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
