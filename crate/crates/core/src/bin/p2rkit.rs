fn main() -> anyhow::Result<()> {
    p2rkit::cli::main_with_args(std::env::args_os())
}
