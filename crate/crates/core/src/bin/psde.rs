use std::process::ExitCode;

fn main() -> ExitCode {
    periodic_sde::cli::main()
}
