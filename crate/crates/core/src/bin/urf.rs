use std::process::ExitCode;

fn main() -> ExitCode {
    urf::cli::run()
}
