use clap::Parser;

fn main() {
    let cli = ccma_cli::Cli::parse();
    match ccma_cli::run(cli) {
        Ok(report) => println!("{report}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
