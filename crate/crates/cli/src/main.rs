use clap::Parser;

fn main() {
    std::process::exit(pulseqml_cli::run(pulseqml_cli::Cli::parse()));
}
