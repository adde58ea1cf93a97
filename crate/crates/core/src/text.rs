//! Small text helpers shared by tokenization code paths.

/// Inserts a space at every lowercase-to-uppercase boundary:
/// `birthDate` becomes `birth Date`. Runs of capitals (`NASA`) are kept.
pub fn split_camel_case(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 4);
    let mut prev_lower = false;
    for c in s.chars() {
        if c.is_uppercase() && prev_lower {
            out.push(' ');
        }
        prev_lower = c.is_lowercase();
        out.push(c);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camel_case_boundaries() {
        assert_eq!(split_camel_case("birthDate"), "birth Date");
        assert_eq!(split_camel_case("selectedByNasa"), "selected By Nasa");
        assert_eq!(split_camel_case("NASA"), "NASA");
        assert_eq!(split_camel_case("cast member"), "cast member");
    }
}
