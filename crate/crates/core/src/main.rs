fn main() {
    std::process::exit(lowrank_fusion::cli::main());
}
