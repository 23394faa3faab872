@problemName NoData
@univariate true
@classLabel true A B
