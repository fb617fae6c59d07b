fn main() {
    std::process::exit(headprobe::cli::main());
}
