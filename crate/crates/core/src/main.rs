fn main() -> anyhow::Result<()> {
    sisa::cli::main()
}
