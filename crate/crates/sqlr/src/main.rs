use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(sqlr::harness::cli::run_cli() as u8)
}
