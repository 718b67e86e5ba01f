fn main() {
    std::process::exit(rnnlab_core::cli::main());
}
