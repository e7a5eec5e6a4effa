fn main() {
    std::process::exit(eqstab_cli::run(std::env::args_os()));
}
