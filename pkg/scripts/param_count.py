"""Parameter counts for the desk and reference layouts, with and without rotatory attention."""

from rotcatt import DESK_CONFIG, REFERENCE_CONFIG, RotCAttTransUNetPP, derive_shapes


def main():
    print(f"{'layout':<10} {'rotatory':<9} {'params':>12}  patches  n")
    for name, cfg in (("desk", DESK_CONFIG), ("reference", REFERENCE_CONFIG)):
        plan = derive_shapes(cfg)
        for enabled in (True, False):
            n = RotCAttTransUNetPP(cfg.replace(rotatory_enabled=enabled)).num_parameters()
            print(f"{name:<10} {'on' if enabled else 'off':<9} {n:>12,}  {list(plan.patch_sizes)}  {plan.seq_len}")


if __name__ == "__main__":
    main()
