fn main() -> std::process::ExitCode {
    covrepair_service::cli::main()
}
