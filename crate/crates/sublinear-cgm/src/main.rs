use clap::Parser;

fn main() {
    let cli = sublinear_cgm::cli::Cli::parse();
    if let Err(e) = sublinear_cgm::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
