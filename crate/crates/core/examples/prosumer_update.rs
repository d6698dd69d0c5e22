//! One local battery update against a single reference signal.

use hier_admm::agent::{cost, local_update, soc_trajectory, Battery, Prosumer, Reference, ReferenceBundle};
use hier_admm::grid::ConstraintId;
use hier_admm::qp::QpSettings;
use hier_admm::tree::NodeId;

fn main() -> hier_admm::Result<()> {
    let horizon = 6;
    let p = Prosumer {
        id: NodeId::root().child(1),
        battery: Battery {
            capacity: 4.0,
            soc0: 2.0,
            p_charge_max: 2.0,
            p_discharge_max: 2.0,
            dt: 1.0,
        },
        p_uncontrolled: vec![1.0, 2.0, 3.0, -1.0, -2.0, 0.5],
        price_buy: 0.3,
        price_sell: 0.1,
    };
    let x_prev = vec![0.0; horizon];
    let settings = QpSettings {
        tol: 1e-8,
        ..QpSettings::default()
    };

    println!("no action: cost {:.3}", cost(&p, &x_prev)?);
    for signal in [0.0, 1.0, -1.0] {
        let refs = ReferenceBundle {
            entries: vec![Reference {
                constraint: ConstraintId(0),
                weight: 1.0,
                signal: vec![signal; horizon],
            }],
        };
        let x = local_update(&p, &x_prev, &refs, 1.0, &settings)?;
        let soc = soc_trajectory(&p.battery, &x);
        let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:6.2}")).collect::<String>();
        println!("reference {signal:+.1}");
        println!("  x   {}", fmt(&x));
        println!("  soc {}", fmt(&soc));
        println!("  cost {:.3}", cost(&p, &x)?);
    }
    Ok(())
}
