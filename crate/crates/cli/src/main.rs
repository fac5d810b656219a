use clap::Parser;

fn main() {
    let cli = neuroscope::cli::Cli::parse();
    std::process::exit(neuroscope::cli::run(cli));
}
