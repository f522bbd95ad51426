ips_supported = ["ips"]

snips_supported = ["snips"]

beta_ips_supported = [
    "beta-ips",
    "beta_ips",
]
