use std::process::ExitCode;

fn main() -> ExitCode {
    dlsvm::cli::main()
}
