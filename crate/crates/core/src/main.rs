fn main() -> std::process::ExitCode {
    vaetruss::cli::main()
}
