use clap::Parser;
use remia_audit::args::Cli;

fn main() {
    let cli = Cli::parse();
    match remia_audit::run(cli) {
        Ok(summary) => println!("{summary}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
