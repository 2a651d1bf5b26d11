fn main() -> std::process::ExitCode {
    unmix::cli::main()
}
