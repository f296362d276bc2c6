use clap::Parser;

fn main() {
    let cli = emodist::cli::Cli::parse();
    std::process::exit(emodist::cli::run(cli));
}
