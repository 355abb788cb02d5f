use clap::Parser;

fn main() -> std::process::ExitCode {
    let cli = simspace_cli::Cli::parse();
    match simspace_cli::execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
