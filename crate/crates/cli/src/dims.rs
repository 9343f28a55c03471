use std::str::FromStr;

/// `WxH` pixel dimensions given on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Dims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| format!("invalid dimension {v:?}"))
        };
        Ok(Dims {
            width: parse(w)?,
            height: parse(h)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses() {
        assert_eq!("224x224".parse::<Dims>().unwrap(), Dims { width: 224, height: 224 });
        assert_eq!("3X4".parse::<Dims>().unwrap(), Dims { width: 3, height: 4 });
        assert!("0x4".parse::<Dims>().is_err());
        assert!("44".parse::<Dims>().is_err());
    }
}
