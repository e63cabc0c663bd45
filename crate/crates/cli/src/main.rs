use clap::Parser;

fn main() {
    let cli = qwork_cli::Cli::parse();
    match qwork_cli::run(cli) {
        Ok(msg) => println!("{msg}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
