fn main() {
    std::process::exit(contact_pmp::cli::run(std::env::args_os()));
}
