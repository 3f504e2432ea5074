fn main() -> std::process::ExitCode {
    contrastive_geometry::cli::main()
}
