fn main() {
    std::process::exit(nearstab::cli::run(std::env::args_os()));
}
