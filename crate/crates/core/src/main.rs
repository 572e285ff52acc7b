fn main() -> std::process::ExitCode {
    focus::cli::main()
}
