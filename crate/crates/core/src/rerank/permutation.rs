/// Turns free-form model output into a permutation of `1..=size`.
///
/// Integers are read in order of appearance; out-of-range and repeated values
/// are dropped, and indices never mentioned are appended in ascending order.
/// Total: any input yields a valid permutation.
pub fn parse_permutation(raw: &str, size: usize) -> Vec<usize> {
    let mut seen = vec![false; size + 1];
    let mut out = Vec::with_capacity(size);
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        // overlong digit runs overflow and are out of range anyway
        if let Ok(n) = raw[start..i].parse::<usize>() {
            if (1..=size).contains(&n) && !seen[n] {
                seen[n] = true;
                out.push(n);
            }
        }
    }
    out.extend((1..=size).filter(|n| !seen[*n]));
    out
}

/// Whether `perm` is a permutation of `1..=size`.
pub fn is_permutation(perm: &[usize], size: usize) -> bool {
    if perm.len() != size {
        return false;
    }
    let mut seen = vec![false; size + 1];
    perm.iter().all(|&n| (1..=size).contains(&n) && !std::mem::replace(&mut seen[n], true))
}
