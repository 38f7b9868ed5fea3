use clap::Parser;

fn main() {
    let cli = mimicry_lab::cli::Cli::parse();
    std::process::exit(mimicry_lab::cli::run(cli));
}
