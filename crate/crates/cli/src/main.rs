use clap::Parser;

fn main() {
    let cli = mbrb_cli::Cli::parse();
    std::process::exit(mbrb_cli::execute(cli));
}
