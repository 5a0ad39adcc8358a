fn main() -> std::process::ExitCode {
    blastcast::cli::main_entry()
}
