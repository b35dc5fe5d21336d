use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(polar_bec::cli::run_cli() as u8)
}
