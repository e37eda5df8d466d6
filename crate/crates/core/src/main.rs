fn main() {
    std::process::exit(txtrec::cli::main(std::env::args_os()));
}
