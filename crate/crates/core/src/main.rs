fn main() -> std::process::ExitCode {
    ssan::harness::cli::main()
}
