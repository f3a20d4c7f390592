fn main() {
    println!("m2o");
}
