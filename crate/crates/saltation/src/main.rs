use clap::Parser;

fn main() {
    let cli = saltation::cli::Cli::parse();
    std::process::exit(saltation::cli::run(cli));
}
