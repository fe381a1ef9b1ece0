fn main() {
    std::process::exit(gdnet::run());
}
