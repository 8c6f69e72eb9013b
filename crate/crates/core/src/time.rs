//! Wall-calendar helpers over Unix timestamps (seconds, UTC).

pub type Timestamp = i64;

pub const HOUR: i64 = 3600;
pub const DAY: i64 = 24 * HOUR;

/// 2024-01-01T00:00:00Z, a Monday.
pub const DEFAULT_START_EPOCH: Timestamp = 1_704_067_200;

/// Day of week with Monday = 0.
pub fn weekday(t: Timestamp) -> usize {
    // 1970-01-01 was a Thursday.
    (t.div_euclid(DAY) + 3).rem_euclid(7) as usize
}

pub fn hour_of_day(t: Timestamp) -> usize {
    t.rem_euclid(DAY).div_euclid(HOUR) as usize
}

pub fn is_weekday(t: Timestamp) -> bool {
    weekday(t) < 5
}
