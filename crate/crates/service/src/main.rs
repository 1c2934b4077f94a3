fn main() -> std::process::ExitCode {
    latcompass_service::cli::main()
}
