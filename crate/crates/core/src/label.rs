use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const FIRST_YEAR: u16 = 1890;
pub const LAST_YEAR: u16 = 1920;
pub const NUM_CLASSES: usize = (LAST_YEAR - FIRST_YEAR + 1) as usize;

/// One of the 31 year classes, 1890 through 1920.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearLabel(u16);

impl YearLabel {
    pub fn new(year: u16) -> Result<Self, Error> {
        if (FIRST_YEAR..=LAST_YEAR).contains(&year) {
            Ok(Self(year))
        } else {
            Err(Error::InvalidLabel(year.to_string()))
        }
    }

    pub fn from_index(index: usize) -> Result<Self, Error> {
        if index < NUM_CLASSES {
            Ok(Self(FIRST_YEAR + index as u16))
        } else {
            Err(Error::InvalidLabel(format!("class index {index}")))
        }
    }

    pub fn year(self) -> u16 {
        self.0
    }

    pub fn index(self) -> usize {
        (self.0 - FIRST_YEAR) as usize
    }

    pub fn text(self) -> String {
        self.0.to_string()
    }

    pub fn digits(self) -> [u8; 4] {
        let y = self.0;
        [(y / 1000) as u8, (y / 100 % 10) as u8, (y / 10 % 10) as u8, (y % 10) as u8]
    }

    pub fn all() -> impl Iterator<Item = YearLabel> {
        (FIRST_YEAR..=LAST_YEAR).map(YearLabel)
    }
}

impl FromStr for YearLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let s = s.trim();
        if s.len() != 4 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(Error::InvalidLabel(s.to_string()));
        }
        YearLabel::new(s.parse().expect("four ascii digits")).map_err(|_| Error::InvalidLabel(s.to_string()))
    }
}

impl TryFrom<String> for YearLabel {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<YearLabel> for String {
    fn from(l: YearLabel) -> String {
        l.text()
    }
}

impl fmt::Display for YearLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_is_offset_from_first_year() {
        let l: YearLabel = "1895".parse().unwrap();
        assert_eq!(l.index(), 5);
        assert_eq!(l.digits(), [1, 8, 9, 5]);
        assert_eq!(YearLabel::from_index(0).unwrap().text(), "1890");
        assert_eq!(YearLabel::all().count(), 31);
    }

    #[test]
    fn rejects_out_of_range_and_malformed() {
        for bad in ["1889", "1921", "189", "18a5", "19000", ""] {
            assert!(bad.parse::<YearLabel>().is_err(), "{bad}");
        }
        assert!(YearLabel::from_index(31).is_err());
    }
}
