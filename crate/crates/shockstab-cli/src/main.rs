fn main() {
    println!("shockstab");
}
