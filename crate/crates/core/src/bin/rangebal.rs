fn main() {
    std::process::exit(rangebal::cli::main());
}
