use std::process::ExitCode;

fn main() -> ExitCode {
    slqsim::cli::main()
}
