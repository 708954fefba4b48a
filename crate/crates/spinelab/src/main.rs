fn main() {
    std::process::exit(spinelab::cli::main_entry());
}
