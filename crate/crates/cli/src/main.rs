use std::process::ExitCode;

fn main() -> ExitCode {
    match renalseg_cli::run_args(std::env::args().skip(1).collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("renalseg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
