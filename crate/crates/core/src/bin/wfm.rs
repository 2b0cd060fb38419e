use clap::Parser;

fn main() {
    let cli = wfm::cli::Cli::parse();
    if let Err(e) = wfm::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(wfm::cli::exit_code(&e));
    }
}
