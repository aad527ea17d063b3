//! Clearing mechanisms.
//!
//! The commodity market is posted-price: each bid, in submission order, is
//! filled from the cheapest asks at the asks' prices. The auction is a
//! sealed-bid k-double auction (k = 1/2) over unit orders.

use serde::Serialize;

use super::{Ask, AskId, Bid, BidId, OrderBook, Price};
use crate::kernel::SimTime;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trade {
    pub buyer: u32,
    pub seller: u32,
    pub bid: u64,
    pub ask: u64,
    pub vm_class: String,
    pub price: Price,
    pub quantity: u32,
    #[serde(skip)]
    pub cleared_at: SimTime,
}

pub fn clear_commodity(book: &mut OrderBook, vm_class: &str, now: SimTime) -> Vec<Trade> {
    clear_commodity_with(book, vm_class, now, |_, _, _| true)
}

/// Commodity clearing restricted to `(bid, ask, quantity)` combinations
/// accepted by `eligible`.
pub fn clear_commodity_with<F>(book: &mut OrderBook, vm_class: &str, now: SimTime, mut eligible: F) -> Vec<Trade>
where
    F: FnMut(&Bid, &Ask, u32) -> bool,
{
    let mut trades = Vec::new();
    // bids are stored in submission order
    for b in 0..book.bids.len() {
        if book.bids[b].order.vm_class != vm_class {
            continue;
        }
        while book.bids[b].remaining > 0 {
            let bid = &book.bids[b];
            let best = book
                .asks
                .iter()
                .enumerate()
                .filter(|(_, a)| a.order.vm_class == vm_class && a.remaining > 0 && a.order.unit_price <= bid.order.max_unit_price)
                .filter(|(_, a)| {
                    let qty = a.remaining.min(bid.remaining);
                    eligible(&bid.order, &a.order, qty)
                })
                .min_by_key(|(_, a)| (a.order.unit_price, a.id))
                .map(|(i, _)| i);
            let Some(a) = best else { break };
            let qty = book.asks[a].remaining.min(book.bids[b].remaining);
            book.asks[a].remaining -= qty;
            book.bids[b].remaining -= qty;
            trades.push(Trade {
                buyer: book.bids[b].order.broker,
                seller: book.asks[a].order.provider,
                bid: book.bids[b].id.0,
                ask: book.asks[a].id.0,
                vm_class: vm_class.to_string(),
                price: book.asks[a].order.unit_price,
                quantity: qty,
                cleared_at: now,
            });
        }
    }
    trades
}

/// One matched unit pair from [`clear_double_auction`], as indices into the
/// input slices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AuctionMatch {
    pub bid: usize,
    pub ask: usize,
    pub price: Price,
}

/// Maximum-volume double auction. Bids are ranked descending and asks
/// ascending (ties by input position). The largest `k` is chosen such that
/// the `k` best bids can each cover one of the `k` cheapest asks when the
/// i-th best bid takes the i-th most expensive of those asks; each pair is
/// priced at its midpoint.
pub fn clear_double_auction(bids: &[Price], asks: &[Price]) -> Vec<AuctionMatch> {
    let mut bid_order: Vec<usize> = (0..bids.len()).collect();
    bid_order.sort_by(|&x, &y| bids[y].cmp(&bids[x]).then(x.cmp(&y)));
    let mut ask_order: Vec<usize> = (0..asks.len()).collect();
    ask_order.sort_by(|&x, &y| asks[x].cmp(&asks[y]).then(x.cmp(&y)));
    // feasibility of k is monotone: dropping the best bid and the dearest ask keeps the rest covered
    let covers = |k: usize| (0..k).all(|i| bids[bid_order[i]] >= asks[ask_order[k - 1 - i]]);
    let k = (0..=bid_order.len().min(ask_order.len())).rev().find(|&k| covers(k)).unwrap_or(0);
    (0..k)
        .map(|i| {
            let (b, a) = (bid_order[i], ask_order[k - 1 - i]);
            AuctionMatch {
                bid: b,
                ask: a,
                price: Price::midpoint(bids[b], asks[a]),
            }
        })
        .collect()
}

/// Runs the double auction on the book's open orders for `vm_class`, with
/// every order split into unit orders. Matched units of the same
/// (bid, ask, price) are merged into one trade.
pub fn clear_auction(book: &mut OrderBook, vm_class: &str, now: SimTime) -> Vec<Trade> {
    let mut unit_bids: Vec<(usize, Price)> = Vec::new();
    for (i, e) in book.bids.iter().enumerate() {
        if e.order.vm_class == vm_class {
            unit_bids.extend(std::iter::repeat_n((i, e.order.max_unit_price), e.remaining as usize));
        }
    }
    let mut unit_asks: Vec<(usize, Price)> = Vec::new();
    for (i, e) in book.asks.iter().enumerate() {
        if e.order.vm_class == vm_class {
            unit_asks.extend(std::iter::repeat_n((i, e.order.unit_price), e.remaining as usize));
        }
    }
    let bid_prices: Vec<Price> = unit_bids.iter().map(|(_, p)| *p).collect();
    let ask_prices: Vec<Price> = unit_asks.iter().map(|(_, p)| *p).collect();
    let mut trades: Vec<Trade> = Vec::new();
    for m in clear_double_auction(&bid_prices, &ask_prices) {
        let (b, _) = unit_bids[m.bid];
        let (a, _) = unit_asks[m.ask];
        book.bids[b].remaining -= 1;
        book.asks[a].remaining -= 1;
        let (bid_id, ask_id): (BidId, AskId) = (book.bids[b].id, book.asks[a].id);
        match trades.last_mut() {
            Some(t) if t.bid == bid_id.0 && t.ask == ask_id.0 && t.price == m.price => t.quantity += 1,
            _ => trades.push(Trade {
                buyer: book.bids[b].order.broker,
                seller: book.asks[a].order.provider,
                bid: bid_id.0,
                ask: ask_id.0,
                vm_class: vm_class.to_string(),
                price: m.price,
                quantity: 1,
                cleared_at: now,
            }),
        }
    }
    trades
}
