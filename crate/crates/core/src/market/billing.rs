use super::{Cents, MarketError, Price};
use crate::kernel::{SimTime, MICROS_PER_SEC};

pub const SECONDS_PER_HOUR: u64 = 3600;
const MICROS_PER_HOUR: u64 = SECONDS_PER_HOUR * MICROS_PER_SEC;

/// Started hours between `start` and `end`.
pub fn billed_hours(start: SimTime, end: SimTime) -> Result<u64, MarketError> {
    let span = end.checked_sub(start).ok_or(MarketError::NegativeInterval)?;
    Ok(span.micros().div_ceil(MICROS_PER_HOUR))
}

/// Pay-as-you-go charge: every started hour costs `unit_price`. Milli-cent
/// remainders round up to the next cent.
pub fn compute_bill(start: SimTime, end: SimTime, unit_price: Price) -> Result<Cents, MarketError> {
    let hours = billed_hours(start, end)?;
    let millicents = hours as u128 * unit_price.millicents() as u128;
    Ok(Cents(millicents.div_ceil(1000) as i64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hourly_ceiling() {
        let ten = Price::from_cents(10);
        assert_eq!(compute_bill(SimTime::ZERO, SimTime::from_secs(3661), ten), Ok(Cents(20)));
        assert_eq!(compute_bill(SimTime::ZERO, SimTime::ZERO, ten), Ok(Cents(0)));
        assert_eq!(compute_bill(SimTime::ZERO, SimTime::from_secs(7200), ten), Ok(Cents(20)));
        assert_eq!(compute_bill(SimTime::ZERO, SimTime::from_micros(1), ten), Ok(Cents(10)));
        assert_eq!(
            compute_bill(SimTime::from_secs(5), SimTime::ZERO, ten),
            Err(MarketError::NegativeInterval)
        );
    }

    #[test]
    fn fractional_cent_prices_round_up() {
        assert_eq!(compute_bill(SimTime::ZERO, SimTime::from_secs(1), Price(7_500)), Ok(Cents(8)));
        assert_eq!(compute_bill(SimTime::ZERO, SimTime::from_secs(7200), Price(7_500)), Ok(Cents(15)));
    }
}
