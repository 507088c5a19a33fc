fn main() {
    std::process::exit(kcmlab::cli::main(std::env::args_os()));
}
