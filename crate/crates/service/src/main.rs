fn main() -> std::process::ExitCode {
    sa_service::cli::main()
}
