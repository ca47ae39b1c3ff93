fn main() {
    std::process::exit(stamo::cli::main_entry());
}
