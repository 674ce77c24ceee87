fn main() -> std::process::ExitCode {
    cascade_rte::cli::main_entry()
}
