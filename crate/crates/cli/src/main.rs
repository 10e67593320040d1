use std::process::ExitCode;

fn main() -> ExitCode {
    match sgdebias_cli::run_from(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sgdebias: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
