use clap::error::ErrorKind;
use clap::Parser;
use ripnerf_cli::error::CliError;
use ripnerf_cli::Cli;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            fail(CliError::Usage(first))
        }
    };
    if let Err(e) = ripnerf_cli::run(cli) {
        fail(e)
    }
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.line());
    std::process::exit(e.exit_code())
}
