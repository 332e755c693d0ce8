use clap::Parser;

fn main() {
    let cli = dtfn_cli::Cli::parse();
    if let Err(e) = dtfn_cli::run(&cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
