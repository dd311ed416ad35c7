/// SQL `LIKE` without an escape character: `%` matches any run of characters
/// (possibly empty), `_` exactly one. Case-sensitive, anchored at both ends.
pub fn match_like(value: &str, pattern: &str) -> bool {
    let value: Vec<char> = value.chars().collect();
    let pattern: Vec<char> = pattern.chars().collect();

    let (mut v, mut p) = (0, 0);
    // Most recent `%` seen, and the value position it is currently absorbing up to.
    let mut backtrack: Option<(usize, usize)> = None;
    while v < value.len() {
        match pattern.get(p) {
            Some('%') => {
                backtrack = Some((p, v));
                p += 1;
            }
            Some('_') => {
                v += 1;
                p += 1;
            }
            Some(&c) if c == value[v] => {
                v += 1;
                p += 1;
            }
            _ => match backtrack {
                // Let the last `%` swallow one more character and retry.
                Some((star_p, star_v)) => {
                    backtrack = Some((star_p, star_v + 1));
                    p = star_p + 1;
                    v = star_v + 1;
                }
                None => return false,
            },
        }
    }
    pattern[p..].iter().all(|&c| c == '%')
}
