/// Bits to send QSGD levels with Elias-gamma codes of `x + 1`, plus a
/// 32-bit norm and one sign bit per nonzero level.
pub fn elias_gamma_bits(levels: &[u32]) -> u64 {
    let codes: u64 = levels
        .iter()
        .map(|&x| 2 * u64::from((u64::from(x) + 1).ilog2()) + 1)
        .sum();
    let signs = levels.iter().filter(|&&x| x != 0).count() as u64;
    codes + 32 + signs
}
