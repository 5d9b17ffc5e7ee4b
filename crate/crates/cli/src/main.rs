use clap::Parser;

fn main() {
    let cli = vasst_cli::Cli::parse();
    if let Err(e) = vasst_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
